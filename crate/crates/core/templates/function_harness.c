{{headers}}

{{extra_code}}

{{solution}}

int main(void)
{
{{tests}}
    return 0;
}
